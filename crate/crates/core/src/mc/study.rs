//! Rejection frequencies of the overidentification tests under a fitted null.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::{bootstrap_distribution, BootstrapConfig, Prepared};
use crate::data::PanelDataset;
use crate::error::Result;
use crate::scalar::Real;
use crate::shares_test::{prepare_shares_test, SharesTestOptions};
use crate::shocks::{prepare_shocks_test, MomentFunctionSet, ShocksTestOptions};

use super::{simulate_shares_dgp, simulate_shocks_dgp, SharesDgp, ShocksDgp};

/// Nominal levels reported by every study.
pub const LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

/// A fitted process that can produce replication `rep`.
pub trait Dgp<T: Real>: Sync {
    fn name(&self) -> &'static str;
    fn simulate(&self, rep: u64) -> Result<PanelDataset<T>>;
}

impl<T: Real> Dgp<T> for SharesDgp<T> {
    fn name(&self) -> &'static str {
        "shares"
    }
    fn simulate(&self, rep: u64) -> Result<PanelDataset<T>> {
        simulate_shares_dgp(self, rep)
    }
}

impl<T: Real> Dgp<T> for ShocksDgp<T> {
    fn name(&self) -> &'static str {
        "shocks"
    }
    fn simulate(&self, rep: u64) -> Result<PanelDataset<T>> {
        simulate_shocks_dgp(self, rep)
    }
}

pub enum StudyTest<'a, T: Real> {
    Shares(SharesTestOptions),
    Shocks {
        moments: &'a MomentFunctionSet<T>,
        opts: ShocksTestOptions<T>,
    },
}

impl<T: Real> StudyTest<'_, T> {
    fn bootstrap(&self) -> &BootstrapConfig {
        match self {
            StudyTest::Shares(o) => &o.bootstrap,
            StudyTest::Shocks { opts, .. } => &opts.bootstrap,
        }
    }

    fn prepare(&self, ds: &PanelDataset<T>) -> Result<Prepared<T>> {
        match self {
            StudyTest::Shares(o) => prepare_shares_test(ds, o),
            StudyTest::Shocks { moments, opts } => prepare_shocks_test(ds, moments, opts),
        }
    }
}

/// Mean and standard deviation across replications of one moment's
/// studentized raw statistic divided by `sqrt(b_eff)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentDrift {
    pub label: String,
    pub reps: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    pub label: String,
    pub dgp: String,
    pub reps: usize,
    /// Replications where every moment was degenerate (never rejected).
    pub degenerate: usize,
    /// Replications that failed numerically (excluded from the rates).
    pub failures: usize,
    pub rates: [f64; 3],
    pub mc_se: [f64; 3],
    pub moments: Vec<MomentDrift>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionTable {
    pub levels: [f64; 3],
    pub rows: Vec<RejectionRow>,
}

impl RejectionTable {
    pub fn new(rows: Vec<RejectionRow>) -> Self {
        Self { levels: LEVELS, rows }
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(13);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "configuration");
        for l in self.levels {
            let _ = write!(out, "  {:>13}", format!("{:.0}%", l * 100.0));
        }
        let _ = writeln!(out, "  {:>6}  {:>6}", "reps", "failed");
        for r in &self.rows {
            let _ = write!(out, "{:<width$}", r.label);
            for (rate, se) in r.rates.iter().zip(&r.mc_se) {
                let _ = write!(out, "  {:>13}", format!("{rate:.3} ({se:.3})"));
            }
            let _ = writeln!(out, "  {:>6}  {:>6}", r.reps, r.failures);
        }
        out
    }
}

fn mix(seed: u64, rep: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Outcome {
    Failed,
    Degenerate,
    Done {
        reject: [bool; 3],
        stats: Vec<(String, f64)>,
    },
}

/// Simulates `reps` datasets from `dgp`, runs `test` on each and tabulates
/// rejections at the levels in [`LEVELS`]. Replication `r` bootstraps with a
/// seed derived from the configured bootstrap seed and `r`.
pub fn rejection_study<T: Real, D: Dgp<T> + ?Sized>(
    dgp: &D,
    test: &StudyTest<'_, T>,
    reps: usize,
    label: &str,
) -> Result<RejectionRow> {
    test.bootstrap().validate()?;
    let base_cfg = *test.bootstrap();
    let outcomes: Vec<Outcome> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let ds = match dgp.simulate(rep) {
                Ok(ds) => ds,
                Err(e) => {
                    log::warn!("replication {rep}: simulation failed: {e}");
                    return Outcome::Failed;
                }
            };
            let infl = match test.prepare(&ds) {
                Ok(Prepared::Influence(infl)) => infl,
                Ok(Prepared::Degenerate(_)) => return Outcome::Degenerate,
                Err(e) => {
                    log::warn!("replication {rep}: test failed: {e}");
                    return Outcome::Failed;
                }
            };
            let cfg = BootstrapConfig {
                seed: mix(base_cfg.seed, rep),
                ..base_cfg
            };
            let dist = bootstrap_distribution(infl.psi_hat.view(), &cfg);
            let t_n = infl.statistic();
            let reject = LEVELS.map(|a| t_n > dist.critical_value(a));
            let root = (infl.b_eff() as f64).sqrt();
            let stats = infl
                .labels
                .iter()
                .zip(infl.raw_stats.iter())
                .map(|(l, v)| (l.clone(), v.as_f64() / root))
                .collect();
            Outcome::Done { reject, stats }
        })
        .collect();

    let mut counted = 0usize;
    let mut degenerate = 0usize;
    let mut failures = 0usize;
    let mut hits = [0usize; 3];
    let mut drift: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for o in outcomes {
        match o {
            Outcome::Failed => failures += 1,
            Outcome::Degenerate => {
                degenerate += 1;
                counted += 1;
            }
            Outcome::Done { reject, stats } => {
                counted += 1;
                for k in 0..3 {
                    hits[k] += usize::from(reject[k]);
                }
                for (l, v) in stats {
                    let e = drift.entry(l).or_insert((0, 0.0, 0.0));
                    e.0 += 1;
                    e.1 += v;
                    e.2 += v * v;
                }
            }
        }
    }
    let rates = hits.map(|h| if counted == 0 { f64::NAN } else { h as f64 / counted as f64 });
    let mc_se = rates.map(|r| (r * (1.0 - r) / counted.max(1) as f64).sqrt());
    let moments = drift
        .into_iter()
        .map(|(label, (k, s, ss))| {
            let mean = s / k as f64;
            MomentDrift {
                label,
                reps: k,
                mean,
                sd: (ss / k as f64 - mean * mean).max(0.0).sqrt(),
            }
        })
        .collect();
    Ok(RejectionRow {
        label: label.to_string(),
        dgp: dgp.name().to_string(),
        reps,
        degenerate,
        failures,
        rates,
        mc_se,
        moments,
    })
}
