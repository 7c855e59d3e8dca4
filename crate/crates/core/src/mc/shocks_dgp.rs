//! Common-shock process for the shocks test.
//!
//! Controls are replaced by their share projections `W_it = Zw_t' S_it`, so
//! that `E[Z | G] = W' Gamma` holds exactly in every replication.

use ndarray::{s, Array1, Array2, Array3};

use crate::bootstrap::substream;
use crate::data::{stack_panel, ClusterIndex, PanelDataset};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, lstsq_min_norm};
use crate::scalar::Real;
use crate::tsls::fit_tsls;

use super::normal;

/// Ridge penalty used to project controls on shares.
pub const DEFAULT_FIT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct ShocksDgp<T: Real> {
    /// Per period, `p x d` coefficients of each control on the shares.
    pub delta_hat: Vec<Array2<T>>,
    /// Loading of the shocks on the projected controls.
    pub gamma_shock: Array1<T>,
    pub sigma_eta: T,
    pub sigma_zeta: T,
    pub alpha_hat: T,
    pub kappa_hat: T,
    pub sigma_xi: T,
    pub beta_hat: T,
    /// Coefficients on the projected controls.
    pub gamma_hat: Array1<T>,
    /// `[n x T]` residuals of the fit on projected controls.
    pub eps_hat: Array2<T>,
    /// Unit-level effects replacing `beta_hat` when set.
    pub beta_i: Option<Array1<T>>,
    /// Base with controls replaced by their projections.
    pub base: PanelDataset<T>,
    pub lambda_fit: T,
    pub seed: u64,
}

impl<T: Real> ShocksDgp<T> {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `Zw_t Gamma`, the conditional mean of the shocks, `[T x p]`.
    pub fn shock_mean(&self) -> Array2<T> {
        let nt = self.delta_hat.len();
        let p = self.base.p();
        let mut m = Array2::zeros((nt, p));
        for (t, d) in self.delta_hat.iter().enumerate() {
            m.row_mut(t).assign(&d.dot(&self.gamma_shock));
        }
        m
    }
}

/// Fits every ingredient of the process; `lambda_fit` penalizes the
/// projection of the controls on the shares.
pub fn fit_shocks_dgp<T: Real>(ds: &PanelDataset<T>, lambda_fit: T) -> Result<ShocksDgp<T>> {
    let (n, nt, p, d) = (ds.n(), ds.periods(), ds.p(), ds.d());
    let shock_x = ds
        .shock_x()
        .ok_or_else(|| Error::InvalidData("the shocks process needs regressor shocks".into()))?;
    if !(lambda_fit >= T::zero()) {
        return Err(Error::Config("ridge penalty must be nonnegative".into()));
    }
    let shares = ds.shares();
    let w = ds.controls();

    let mut delta_hat = Vec::with_capacity(nt);
    for t in 0..nt {
        let s_t = shares.slice(s![.., t, ..]);
        let mut gram = s_t.t().dot(&s_t);
        for j in 0..p {
            gram[[j, j]] += lambda_fit;
        }
        let l = cholesky(&gram, T::lit(1e-12)).map_err(|_| Error::SingularGram { period: t })?;
        let rhs = s_t.t().dot(&w.slice(s![.., t, ..]));
        let mut delta = Array2::zeros((p, d));
        for k in 0..d {
            delta.column_mut(k).assign(&cholesky_solve(&l, rhs.column(k)));
        }
        delta_hat.push(delta);
    }

    // Gamma: pooled least squares of the shocks on Zw across periods
    let mut a = Array2::zeros((nt * p, d));
    let mut b = Array1::zeros(nt * p);
    for t in 0..nt {
        a.slice_mut(s![t * p..(t + 1) * p, ..]).assign(&delta_hat[t]);
        b.slice_mut(s![t * p..(t + 1) * p]).assign(&ds.shock_z().row(t));
    }
    let gamma_shock = lstsq_min_norm(a.view(), b.view());
    let nu = &b - &a.dot(&gamma_shock);

    let clusters = ClusterIndex::from_labels(ds.sector_cluster());
    let c = clusters.len();
    let mut sum = vec![T::zero(); c];
    let mut sum_sq = vec![T::zero(); c];
    let mut count = vec![0usize; c];
    for t in 0..nt {
        for j in 0..p {
            let g = clusters.assignment[j];
            let v = nu[t * p + j];
            sum[g] += v;
            sum_sq[g] += v * v;
            count[g] += 1;
        }
    }
    let paired: Vec<usize> = (0..c).filter(|&g| count[g] >= 2).collect();
    if paired.is_empty() {
        return Err(Error::InvalidData(
            "no sector cluster holds two shock observations".into(),
        ));
    }
    let var_eta = paired
        .iter()
        .map(|&g| (sum[g] * sum[g] - sum_sq[g]) / T::from_usize_lossy(count[g] * (count[g] - 1)))
        .sum::<T>()
        / T::from_usize_lossy(paired.len());
    let mean_sq = (0..c)
        .map(|g| sum_sq[g] / T::from_usize_lossy(count[g]))
        .sum::<T>()
        / T::from_usize_lossy(c);
    let var_zeta = mean_sq - var_eta;

    // first-stage shock regression
    let mut a = Array2::zeros((nt * p, 2));
    let mut bx = Array1::zeros(nt * p);
    for t in 0..nt {
        for j in 0..p {
            a[[t * p + j, 0]] = T::one();
            a[[t * p + j, 1]] = ds.shock_z()[[t, j]];
            bx[t * p + j] = shock_x[[t, j]];
        }
    }
    let coef = lstsq_min_norm(a.view(), bx.view());
    let resid = &bx - &a.dot(&coef);
    let var_xi = resid.dot(&resid) / T::from_usize_lossy(nt * p);

    let mut w_hat = Array3::zeros((n, nt, d));
    for t in 0..nt {
        let proj = shares.slice(s![.., t, ..]).dot(&delta_hat[t]);
        w_hat.slice_mut(s![.., t, ..]).assign(&proj);
    }
    let mut parts = ds.to_parts();
    parts.w = w_hat;
    let base = parts.build()?;
    let fit = fit_tsls(&stack_panel(&base))?;
    let eps_hat = fit
        .eps_hat
        .clone()
        .into_shape_with_order((n, nt))
        .expect("unit-major residuals");

    Ok(ShocksDgp {
        delta_hat,
        gamma_shock,
        sigma_eta: var_eta.max(T::zero()).sqrt(),
        sigma_zeta: var_zeta.max(T::zero()).sqrt(),
        alpha_hat: coef[0],
        kappa_hat: coef[1],
        sigma_xi: var_xi.max(T::zero()).sqrt(),
        beta_hat: fit.beta,
        gamma_hat: fit.gamma_s,
        eps_hat,
        beta_i: None,
        base,
        lambda_fit,
        seed: 0,
    })
}

/// Replication `rep`: fresh shocks around their conditional mean, rebuilt
/// instrument and regressor, outcome from the fitted residuals.
pub fn simulate_shocks_dgp<T: Real>(dgp: &ShocksDgp<T>, rep: u64) -> Result<PanelDataset<T>> {
    let base = &dgp.base;
    let (n, nt, p) = (base.n(), base.periods(), base.p());
    let mut rng = substream(dgp.seed, rep);
    let clusters = ClusterIndex::from_labels(base.sector_cluster());
    let v: Vec<T> = (0..clusters.len()).map(|_| normal(&mut rng)).collect();
    let mean = dgp.shock_mean();
    let mut shock_z = Array2::zeros((nt, p));
    let mut shock_x = Array2::zeros((nt, p));
    for t in 0..nt {
        for j in 0..p {
            let u: T = normal(&mut rng);
            let ux: T = normal(&mut rng);
            let z = mean[[t, j]] + v[clusters.assignment[j]] * dgp.sigma_eta + u * dgp.sigma_zeta;
            shock_z[[t, j]] = z;
            shock_x[[t, j]] = dgp.alpha_hat + dgp.kappa_hat * z + ux * dgp.sigma_xi;
        }
    }
    let s_x = base.regressor_shares().unwrap_or(base.shares());
    let w = base.controls();
    let mut x = Array2::zeros((n, nt));
    let mut y = Array2::zeros((n, nt));
    for i in 0..n {
        let beta = dgp.beta_i.as_ref().map_or(dgp.beta_hat, |b| b[i]);
        for t in 0..nt {
            let xi = s_x.slice(s![i, t, ..]).dot(&shock_x.row(t));
            x[[i, t]] = xi;
            y[[i, t]] = xi * beta + w.slice(s![i, t, ..]).dot(&dgp.gamma_hat) + dgp.eps_hat[[i, t]];
        }
    }
    let mut parts = base.to_parts();
    parts.shock_z = shock_z;
    parts.shock_x = Some(shock_x);
    parts.x = x;
    parts.y = y;
    parts.build()
}
