//! Overidentification test when identification comes from the shocks.

mod moments;
mod residual;
mod test;

pub use moments::{
    logit_centers, logit_moment_set, LogitPdf, MomentFunction, MomentFunctionSet, MomentKind,
    MomentSpec, Power,
};
pub use residual::{
    projection_shock_residual, ridge_shock_residual, ShockResidual, ShockResidualMethod,
};
pub use test::{
    moment_corrections, prepare_shocks_test, run_shocks_test, sector_rows_clusters, shocks_influence,
    shocks_influence_rows, MomentCorrections, SectorClustering, ShockResidualSpec,
    ShocksTestOptions, DEFAULT_LAMBDA,
};
