//! Multiplier bootstrap for max-type statistics over an influence matrix.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClusterIndex;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative size below which a moment's standard deviation counts as zero.
pub const DEGENERATE_SIGMA: f64 = 1e-10;

/// Largest effective sample for which stratified Rademacher enumeration is used.
const MAX_ENUMERATED: usize = 24;

/// Studentized influence contributions, one row per effective observation.
#[derive(Debug, Clone)]
pub struct InfluenceMatrix<T: Real> {
    /// `b_eff x q`, each column divided by its `sigma_hat`.
    pub psi_hat: Array2<T>,
    pub sigma_hat: Array1<T>,
    /// Studentized moment sums.
    pub raw_stats: Array1<T>,
    pub labels: Vec<String>,
    /// Labels of moments dropped for zero variance.
    pub dropped: Vec<String>,
}

impl<T: Real> InfluenceMatrix<T> {
    pub fn b_eff(&self) -> usize {
        self.psi_hat.nrows()
    }

    pub fn q(&self) -> usize {
        self.psi_hat.ncols()
    }

    /// `max_j |raw_stats_j|`.
    pub fn statistic(&self) -> T {
        self.raw_stats
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

/// Sums unstudentized influence rows within clusters, studentizes, and drops
/// degenerate moments.
///
/// `abs_rows` bounds the magnitude of every entry of `rows` before
/// cancellation; it sets the scale against which a zero standard deviation
/// is judged.
pub(crate) fn cluster_studentize<T: Real>(
    rows: ArrayView2<T>,
    abs_rows: ArrayView2<T>,
    raw_moments: ArrayView1<T>,
    labels: &[String],
    clusters: &ClusterIndex,
) -> Result<InfluenceMatrix<T>> {
    let c = clusters.len();
    if c < 2 {
        return Err(Error::TooFewClusters {
            needed: 2,
            found: c,
        });
    }
    let q = rows.ncols();
    let mut sums = Array2::<T>::zeros((c, q));
    let mut abs_sums = Array2::<T>::zeros((c, q));
    for (r, &g) in clusters.assignment.iter().enumerate() {
        sums.row_mut(g).scaled_add(T::one(), &rows.row(r));
        abs_sums.row_mut(g).scaled_add(T::one(), &abs_rows.row(r));
    }
    let cf = T::from_usize_lossy(c);
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut sigma = Vec::new();
    for j in 0..q {
        let col = sums.column(j);
        let mean = col.sum() / cf;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
        let sd = var.sqrt();
        let scale = (abs_sums.column(j).iter().map(|&v| v * v).sum::<T>() / cf).sqrt();
        if sd > T::lit(DEGENERATE_SIGMA) * scale && sd > T::zero() && sd.is_finite() {
            keep.push(j);
            sigma.push(sd);
        } else {
            dropped.push(labels[j].clone());
        }
    }
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} moment(s) with zero estimated variance: {}",
            dropped.len(),
            dropped.join(", ")
        );
    }
    if keep.is_empty() {
        return Err(Error::AllMomentsDegenerate);
    }
    let mut psi = Array2::zeros((c, keep.len()));
    let mut raw = Array1::zeros(keep.len());
    for (k, (&j, &sd)) in keep.iter().zip(&sigma).enumerate() {
        psi.column_mut(k).assign(&sums.column(j).mapv(|v| v / sd));
        raw[k] = raw_moments[j] / sd;
    }
    Ok(InfluenceMatrix {
        psi_hat: psi,
        sigma_hat: Array1::from(sigma),
        raw_stats: raw,
        labels: keep.iter().map(|&j| labels[j].clone()).collect(),
        dropped,
    })
}

/// Influence ready for the bootstrap, or the labels of a fully degenerate moment set.
#[derive(Debug, Clone)]
pub enum Prepared<T: Real> {
    Influence(InfluenceMatrix<T>),
    Degenerate(Vec<String>),
}

impl<T: Real> Prepared<T> {
    pub(crate) fn from_result(res: Result<InfluenceMatrix<T>>, labels: Vec<String>) -> Result<Self> {
        match res {
            Ok(infl) => Ok(Prepared::Influence(infl)),
            Err(Error::AllMomentsDegenerate) => {
                log::warn!("every moment is degenerate; reporting a zero statistic");
                Ok(Prepared::Degenerate(labels))
            }
            Err(e) => Err(e),
        }
    }

    /// Runs the bootstrap, or reports the degenerate case.
    pub fn into_result(self, cfg: &BootstrapConfig, config: serde_json::Value) -> Result<TestResult> {
        match self {
            Prepared::Influence(infl) => run_bootstrap(&infl, cfg, config),
            Prepared::Degenerate(labels) => {
                cfg.validate()?;
                Ok(TestResult::degenerate(labels, config))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Gaussian,
    Rademacher,
    Mammen,
    Multinomial,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Gaussian => "gaussian",
            Scheme::Rademacher => "rademacher",
            Scheme::Mammen => "mammen",
            Scheme::Multinomial => "multinomial",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Scheme::Gaussian),
            "rademacher" => Ok(Scheme::Rademacher),
            "mammen" => Ok(Scheme::Mammen),
            "multinomial" => Ok(Scheme::Multinomial),
            other => Err(Error::Config(format!("unknown bootstrap scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub scheme: Scheme,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            scheme: Scheme::Gaussian,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::Config("bootstrap draw count B must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Independent generator for replication `rep` of a run seeded with `seed`.
pub fn substream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// I.i.d. multiplier weights for one bootstrap replication.
pub fn draw_weights<T: Real, R: Rng + ?Sized>(scheme: Scheme, b_eff: usize, rng: &mut R) -> Array1<T> {
    match scheme {
        Scheme::Gaussian => {
            Array1::from_shape_fn(b_eff, |_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        }
        Scheme::Rademacher => Array1::from_shape_fn(b_eff, |_| {
            if rng.random::<bool>() {
                T::one()
            } else {
                -T::one()
            }
        }),
        Scheme::Mammen => {
            let r5 = 5f64.sqrt();
            let p_low = (r5 + 1.0) / (2.0 * r5);
            let (low, high) = ((1.0 - r5) / 2.0, (1.0 + r5) / 2.0);
            Array1::from_shape_fn(b_eff, |_| {
                T::lit(if rng.random::<f64>() < p_low { low } else { high })
            })
        }
        Scheme::Multinomial => {
            let mut counts = Array1::<T>::zeros(b_eff);
            if b_eff > 0 {
                for _ in 0..b_eff {
                    counts[rng.random_range(0..b_eff)] += T::one();
                }
            }
            counts
        }
    }
}

/// `max_j |sum_i omega_i (psi_ij - mean_j)|`.
pub fn bootstrap_max_stat<T: Real>(psi_hat: ArrayView2<T>, omega: ArrayView1<T>) -> T {
    max_abs_weighted(center_columns(psi_hat).view(), omega)
}

fn center_columns<T: Real>(psi: ArrayView2<T>) -> Array2<T> {
    let n = T::from_usize_lossy(psi.nrows().max(1));
    let means = psi.sum_axis(Axis(0)) / n;
    &psi - &means
}

fn max_abs_weighted<T: Real>(centered: ArrayView2<T>, omega: ArrayView1<T>) -> T {
    centered
        .t()
        .dot(&omega)
        .iter()
        .fold(T::zero(), |m, &v| m.max(v.abs()))
}

/// Rademacher signs from the bits of `pattern`: bit `i` set means `-1`.
fn sign_pattern<T: Real>(pattern: u64, b_eff: usize) -> Array1<T> {
    Array1::from_shape_fn(b_eff, |i| {
        if pattern >> i & 1 == 1 {
            -T::one()
        } else {
            T::one()
        }
    })
}

/// Whether `B` Rademacher draws can cover every sign vector equally often.
pub fn stratified(cfg: &BootstrapConfig, b_eff: usize) -> bool {
    cfg.scheme == Scheme::Rademacher && b_eff <= MAX_ENUMERATED && cfg.b % (1usize << b_eff) == 0
}

/// Sorted bootstrap draws of the max statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution<T: Real> {
    sorted: Vec<T>,
}

impl<T: Real> BootstrapDistribution<T> {
    pub fn from_draws(mut draws: Vec<T>) -> Self {
        draws.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap draws"));
        Self { sorted: draws }
    }

    pub fn draws(&self) -> &[T] {
        &self.sorted
    }

    /// The `ceil((1 - alpha) B)`-th order statistic.
    pub fn critical_value(&self, alpha: f64) -> T {
        let b = self.sorted.len();
        let k = ((1.0 - alpha) * b as f64 - 1e-9).ceil().clamp(1.0, b as f64) as usize;
        self.sorted[k - 1]
    }

    /// `(1 + #{T* >= t_n}) / (B + 1)`.
    pub fn p_value(&self, t_n: T) -> f64 {
        let below = self.sorted.partition_point(|&v| v < t_n);
        let count = self.sorted.len() - below;
        (1 + count) as f64 / (self.sorted.len() + 1) as f64
    }
}

/// Draws `B` bootstrap max statistics, in replication order and independent
/// of the number of worker threads.
pub fn bootstrap_distribution<T: Real>(
    psi_hat: ArrayView2<T>,
    cfg: &BootstrapConfig,
) -> BootstrapDistribution<T> {
    let centered = center_columns(psi_hat);
    let b_eff = centered.nrows();
    let strat = stratified(cfg, b_eff);
    let draws: Vec<T> = (0..cfg.b)
        .into_par_iter()
        .map(|rep| {
            let omega = if strat {
                sign_pattern(rep as u64 % (1u64 << b_eff), b_eff)
            } else {
                draw_weights(cfg.scheme, b_eff, &mut substream(cfg.seed, rep as u64))
            };
            max_abs_weighted(centered.view(), omega.view())
        })
        .collect();
    BootstrapDistribution::from_draws(draws)
}

/// `(c_hat, p_value, reject)` from a statistic and its bootstrap draws.
pub fn critical_value_and_pvalue<T: Real>(t_n: T, t_star: &[T], alpha: f64) -> (T, f64, bool) {
    let dist = BootstrapDistribution::from_draws(t_star.to_vec());
    let c = dist.critical_value(alpha);
    (c, dist.p_value(t_n), t_n > c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentStat {
    pub label: String,
    pub stat: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    #[serde(rename = "T_n")]
    pub t_n: f64,
    pub c_hat: f64,
    pub p_value: f64,
    pub reject: bool,
    pub b_eff: usize,
    pub q: usize,
    /// All moments had zero variance; the statistic is reported as 0.
    pub degenerate: bool,
    pub per_moment: Vec<MomentStat>,
    pub dropped_moments: Vec<String>,
    pub config: serde_json::Value,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl TestResult {
    pub fn degenerate(dropped: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            t_n: 0.0,
            c_hat: 0.0,
            p_value: 1.0,
            reject: false,
            b_eff: 0,
            q: 0,
            degenerate: true,
            per_moment: Vec::new(),
            dropped_moments: dropped,
            config,
            elapsed: Duration::ZERO,
        }
    }
}

/// Bootstraps `infl` and assembles the test summary.
pub fn run_bootstrap<T: Real>(
    infl: &InfluenceMatrix<T>,
    cfg: &BootstrapConfig,
    config: serde_json::Value,
) -> Result<TestResult> {
    cfg.validate()?;
    if infl.psi_hat.iter().any(|v| !v.is_finite()) || infl.raw_stats.iter().any(|v| !v.is_finite())
    {
        return Err(Error::InvalidData("non-finite influence contributions".into()));
    }
    let start = std::time::Instant::now();
    let dist = bootstrap_distribution(infl.psi_hat.view(), cfg);
    let t_n = infl.statistic();
    let c_hat = dist.critical_value(cfg.alpha);
    Ok(TestResult {
        t_n: t_n.as_f64(),
        c_hat: c_hat.as_f64(),
        p_value: dist.p_value(t_n),
        reject: t_n > c_hat,
        b_eff: infl.b_eff(),
        q: infl.q(),
        degenerate: false,
        per_moment: infl
            .labels
            .iter()
            .zip(infl.raw_stats.iter().zip(&infl.sigma_hat))
            .map(|(l, (&s, &sd))| MomentStat {
                label: l.clone(),
                stat: s.as_f64(),
                sigma: sd.as_f64(),
            })
            .collect(),
        dropped_moments: infl.dropped.clone(),
        config,
        elapsed: start.elapsed(),
    })
}
