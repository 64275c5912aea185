//! Quasi-stationary distributions of absorbing continuous-time Markov chains,
//! computed as the fixed point of the return map `μ ↦ π^μ`, together with
//! computable accuracy certificates for birth–death chains and Monte-Carlo
//! cross-checks.

pub mod bd_models;
pub mod cli;
pub mod ctmc;
pub mod linalg;
pub mod numeric;
pub mod return_map;
pub mod simulate;
