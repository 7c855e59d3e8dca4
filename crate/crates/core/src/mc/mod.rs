//! Monte Carlo data-generating processes and rejection-rate studies.
//!
//! Both processes are fitted to a base dataset and then simulated one
//! replication at a time; replication `r` always draws from the same random
//! substream, so results do not depend on the number of worker threads.

mod shares_dgp;
mod shocks_dgp;
mod study;
mod synthetic;

pub use shares_dgp::{fit_shares_dgp, simulate_shares_dgp, SharesDgp};
pub use shocks_dgp::{fit_shocks_dgp, simulate_shocks_dgp, ShocksDgp, DEFAULT_FIT_LAMBDA};
pub use study::{rejection_study, Dgp, MomentDrift, RejectionRow, RejectionTable, StudyTest, LEVELS};
pub use synthetic::{LongPanelBase, SyntheticBase};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

pub(crate) fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}
