//! Closed-form solutions for two worked applications, used both as shipped
//! scenarios and as analytic oracles for the generic solver pipeline:
//!
//! * inventory liquidation under quadratic execution costs with a permanent
//!   price impact proportional to the average trading rate of the crowd
//!   (finite horizon);
//! * production of an exhaustible resource under a linear inverse demand
//!   rule with substitutability across producers (infinite horizon,
//!   stationary gains).

mod liquidation;
mod resource;

pub use liquidation::{
    figure_mean_inventory_table, liq_k, liq_k_nu, liq_mean_inventory, liq_omega_pi,
    liq_optimal_control, LiquidationParams,
};
pub use resource::{
    res_gains, res_mean_reserve, res_optimal_control, res_raw_gains, res_stationary_reserve,
    res_stationary_reserve_forms, ResourceParams,
};
