//! Standard errors when the number of periods grows.
//!
//! The score `(1/nT) sum Z eps` splits into a time-series part driven by the
//! cross-sectional means `zeta_t = (1/n) sum_i S_it eps_it` and a panel part
//! that averages out across units.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tsls::TslsFit;

/// Below this many periods the asymptotics in `T` are not credible.
pub const FEW_PERIODS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDecomposition<T: Real> {
    /// `[T x p]` cross-sectional means of `S_it eps_it`.
    pub zeta_hat: Array2<T>,
    /// `[n x T]` panel contributions `shock_t' (S_it eps_it - zeta_t)`.
    pub nu_hat: Array2<T>,
    /// `shock_t' zeta_t`.
    pub ts_series: Array1<T>,
    /// `(1/nT) sum X Z`.
    pub d_hat: T,
}

impl<T: Real> ScoreDecomposition<T> {
    pub fn n(&self) -> usize {
        self.nu_hat.nrows()
    }

    pub fn periods(&self) -> usize {
        self.nu_hat.ncols()
    }
}

/// Splits the score of a fitted panel. `fit` must come from the unit-major
/// stacking of `ds`.
pub fn decompose_score<T: Real>(ds: &PanelDataset<T>, fit: &TslsFit<T>) -> Result<ScoreDecomposition<T>> {
    let (n, nt, p) = (ds.n(), ds.periods(), ds.p());
    if nt < 2 {
        return Err(Error::TooFewPeriods {
            needed: 2,
            found: nt,
        });
    }
    if fit.eps_hat.len() != n * nt {
        return Err(Error::Dimension(format!(
            "{} residuals for a {n} x {nt} panel",
            fit.eps_hat.len()
        )));
    }
    let eps = fit.eps_hat.view().into_shape_with_order((n, nt)).expect("contiguous residuals");
    let nf = T::from_usize_lossy(n);
    let mut zeta_hat = Array2::zeros((nt, p));
    for t in 0..nt {
        let s_t = ds.shares().slice(s![.., t, ..]);
        zeta_hat.row_mut(t).assign(&(s_t.t().dot(&eps.column(t)) / nf));
    }
    let shock = ds.shock_z();
    let ts_series: Array1<T> = (0..nt).map(|t| shock.row(t).dot(&zeta_hat.row(t))).collect();
    let z = ds.instrument();
    let mut nu_hat = Array2::zeros((n, nt));
    for i in 0..n {
        for t in 0..nt {
            nu_hat[[i, t]] = z[[i, t]] * eps[[i, t]] - ts_series[t];
        }
    }
    let d_hat = (&ds.x() * &z).sum() / T::from_usize_lossy(n * nt);
    Ok(ScoreDecomposition {
        zeta_hat,
        nu_hat,
        ts_series,
        d_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// `floor(1.3 T^(1/3))`.
    #[default]
    Auto,
    Fixed(usize),
}

impl Bandwidth {
    pub fn lags(self, periods: usize) -> usize {
        let max = periods.saturating_sub(1);
        match self {
            Bandwidth::Auto => ((1.3 * (periods as f64).cbrt()).floor() as usize).min(max),
            Bandwidth::Fixed(l) => l.min(max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongPanelVariance<T: Real> {
    pub var_zeta: T,
    pub var_nu: T,
    pub se_beta: T,
    pub hac_bandwidth: usize,
    /// `var_zeta / (D^2 T)`.
    pub term_zeta: T,
    /// `var_nu / (D^2 n T)`.
    pub term_nu: T,
    pub beta_hat: Option<T>,
    pub warning: Option<String>,
}

/// Bartlett-kernel long-run variance of the demeaned `series` with `lags` lags.
pub fn bartlett_lrv<T: Real>(series: &[T], lags: usize) -> T {
    let len = series.len();
    if len == 0 {
        return T::zero();
    }
    let lf = T::from_usize_lossy(len);
    let mean = series.iter().copied().sum::<T>() / lf;
    let x: Vec<T> = series.iter().map(|&v| v - mean).collect();
    let gamma = |k: usize| (k..len).map(|t| x[t] * x[t - k]).sum::<T>() / lf;
    let mut v = gamma(0);
    for k in 1..=lags.min(len - 1) {
        let w = T::one() - T::from_usize_lossy(k) / T::from_usize_lossy(lags + 1);
        v += T::lit(2.0) * w * gamma(k);
    }
    v.max(T::zero())
}

pub fn longpanel_se<T: Real>(dec: &ScoreDecomposition<T>, bandwidth: Bandwidth) -> Result<LongPanelVariance<T>> {
    let (n, nt) = (dec.n(), dec.periods());
    if dec.d_hat == T::zero() {
        return Err(Error::ZeroDenominator("(1/nT) sum X Z is zero".into()));
    }
    let lags = bandwidth.lags(nt);
    let var_zeta = bartlett_lrv(dec.ts_series.as_slice().expect("contiguous"), lags);
    let cells = T::from_usize_lossy(n * nt);
    let mean = dec.nu_hat.sum() / cells;
    let var_nu = dec.nu_hat.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cells;
    let inv_d2 = T::one() / (dec.d_hat * dec.d_hat);
    let term_zeta = inv_d2 * var_zeta / T::from_usize_lossy(nt);
    let term_nu = inv_d2 * var_nu / cells;
    let warning = (nt < FEW_PERIODS).then(|| {
        let msg = format!(
            "only {nt} periods: an approximation that relies on the number of periods diverging is not credible here"
        );
        log::warn!("{msg}");
        msg
    });
    Ok(LongPanelVariance {
        var_zeta,
        var_nu,
        se_beta: (term_zeta + term_nu).sqrt(),
        hac_bandwidth: lags,
        term_zeta,
        term_nu,
        beta_hat: None,
        warning,
    })
}
