//! Nominal tracking MPC and the two safety filters.

mod filter;
mod mpc;
mod path;

pub use filter::{
    filter_cbf_baseline, filter_wb_cvar_cbf, mean_fused_position, FilterDecision, FilterStatus, SafetyFilter,
};
pub use mpc::{mpc_nominal, mpc_solve, MpcConfig, MpcOutput};
pub use path::{PathPoint, ReferencePath};
