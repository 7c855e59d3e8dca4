//! Estimation and overidentification testing for shift-share designs.

pub mod bootstrap;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod long_panel;
pub mod mc;
pub mod scalar;
pub mod shocks;
pub mod tsls;

pub use bootstrap::{BootstrapConfig, InfluenceMatrix, Scheme, TestResult};
pub use data::{ClusterIndex, PanelDataset, PanelParts, StackedDesign};
pub use error::{Error, Result};
pub use scalar::Real;
pub use shares_test::{run_shares_test, SharesTestOptions};
pub use shocks::{run_shocks_test, ShocksTestOptions};
pub use tsls::{fit_tsls, TslsFit};

/// Double-precision aliases for the common entry points.
pub type Dataset = PanelDataset<f64>;
pub type Design = StackedDesign<f64>;
pub type Fit = TslsFit<f64>;
pub type Influence = InfluenceMatrix<f64>;
