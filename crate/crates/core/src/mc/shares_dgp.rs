//! Heteroskedastic group-shock process for the shares test.

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;

use crate::bootstrap::substream;
use crate::data::{ClusterIndex, PanelDataset};
use crate::error::{Error, Result};
use crate::linalg::lstsq_min_norm;
use crate::scalar::Real;
use crate::tsls::TslsFit;

use super::normal;

/// `eps = eta_c + zeta_it` with `E[eta_c^2] = a_eta + s_eta sum_c S'S` and
/// `E[zeta^2] = a_zeta + s_zeta S'S`.
#[derive(Debug, Clone)]
pub struct SharesDgp<T: Real> {
    pub a_eta: T,
    pub s_eta: T,
    pub a_zeta: T,
    pub s_zeta: T,
    pub beta_hat: T,
    pub gamma_hat: Array1<T>,
    pub base: PanelDataset<T>,
    pub seed: u64,
}

impl<T: Real> SharesDgp<T> {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn share_norms<T: Real>(s: &Array3<T>) -> Array1<T> {
    let (n, nt, _) = s.dim();
    Array1::from_shape_fn(n * nt, |r| {
        let row = s.slice(s![r / nt, r % nt, ..]);
        row.dot(&row)
    })
}

fn cluster_norms<T: Real>(norms: &Array1<T>, clusters: &ClusterIndex) -> Array1<T> {
    let mut out = Array1::zeros(clusters.len());
    for (r, &c) in clusters.assignment.iter().enumerate() {
        out[c] += norms[r];
    }
    out
}

/// Fits the variance model to the residuals of `fit`, which must come from
/// the unit-major stacking of `ds`.
pub fn fit_shares_dgp<T: Real>(ds: &PanelDataset<T>, fit: &TslsFit<T>) -> Result<SharesDgp<T>> {
    let rows = ds.n() * ds.periods();
    if fit.eps_hat.len() != rows {
        return Err(Error::Dimension(format!(
            "{} residuals for {rows} observations",
            fit.eps_hat.len()
        )));
    }
    if ds.shock_x().is_none() {
        return Err(Error::InvalidData(
            "the shares process rebuilds the regressor and needs its shocks".into(),
        ));
    }
    let clusters = ClusterIndex::from_labels(ds.obs_cluster());
    let c = clusters.len();
    let e = &fit.eps_hat;
    let norms = share_norms(ds.shares());
    let big_n = cluster_norms(&norms, &clusters);

    let mut sum = Array1::<T>::zeros(c);
    let mut sum_sq = Array1::<T>::zeros(c);
    let mut count = vec![0usize; c];
    for (r, &g) in clusters.assignment.iter().enumerate() {
        sum[g] += e[r];
        sum_sq[g] += e[r] * e[r];
        count[g] += 1;
    }
    // Every ordered pair within a cluster shares the regressor (1, N_c), so
    // least squares over pairs collapses to one weighted row per cluster.
    let paired: Vec<usize> = (0..c).filter(|&g| count[g] >= 2).collect();
    if paired.is_empty() {
        return Err(Error::InvalidData(
            "no cluster holds two observations; the common-shock variance is not identified".into(),
        ));
    }
    let mut a = Array2::zeros((paired.len(), 2));
    let mut b = Array1::zeros(paired.len());
    for (k, &g) in paired.iter().enumerate() {
        let m = T::from_usize_lossy(count[g] * (count[g] - 1));
        let root = m.sqrt();
        let cross = sum[g] * sum[g] - sum_sq[g];
        a[[k, 0]] = root;
        a[[k, 1]] = root * big_n[g];
        b[k] = cross / root;
    }
    let eta = lstsq_min_norm(a.view(), b.view());

    let mut a = Array2::zeros((rows, 2));
    let mut b = Array1::zeros(rows);
    for (r, &g) in clusters.assignment.iter().enumerate() {
        let var_eta = (eta[0] + eta[1] * big_n[g]).max(T::zero());
        a[[r, 0]] = T::one();
        a[[r, 1]] = norms[r];
        b[r] = e[r] * e[r] - var_eta;
    }
    let zeta = lstsq_min_norm(a.view(), b.view());

    Ok(SharesDgp {
        a_eta: eta[0],
        s_eta: eta[1],
        a_zeta: zeta[0],
        s_zeta: zeta[1],
        beta_hat: fit.beta,
        gamma_hat: fit.gamma_s.clone(),
        base: ds.clone(),
        seed: 0,
    })
}

/// Replication `rep`: shares resampled with replacement within each period,
/// instrument and regressor rebuilt, Gaussian group and idiosyncratic errors.
pub fn simulate_shares_dgp<T: Real>(dgp: &SharesDgp<T>, rep: u64) -> Result<PanelDataset<T>> {
    let base = &dgp.base;
    let (n, nt, np) = (base.n(), base.periods(), base.p());
    let mut rng = substream(dgp.seed, rep);
    let s_z = base.shares();
    let s_x = base.regressor_shares().unwrap_or(s_z);
    let shock_x = base
        .shock_x()
        .ok_or_else(|| Error::InvalidData("regressor shocks missing from the base".into()))?;

    let mut new_z = Array3::zeros((n, nt, np));
    let mut new_x = Array3::zeros((n, nt, np));
    for t in 0..nt {
        for i in 0..n {
            let k = rng.random_range(0..n);
            new_z.slice_mut(s![i, t, ..]).assign(&s_z.slice(s![k, t, ..]));
            new_x.slice_mut(s![i, t, ..]).assign(&s_x.slice(s![k, t, ..]));
        }
    }

    let clusters = ClusterIndex::from_labels(base.obs_cluster());
    let norms = share_norms(&new_z);
    let big_n = cluster_norms(&norms, &clusters);
    let v: Vec<T> = (0..clusters.len()).map(|_| normal(&mut rng)).collect();
    let w = base.controls();
    let mut x = Array2::zeros((n, nt));
    let mut y = Array2::zeros((n, nt));
    for i in 0..n {
        for t in 0..nt {
            let r = i * nt + t;
            let g = clusters.assignment[r];
            let xi = new_x.slice(s![i, t, ..]).dot(&shock_x.row(t));
            let sd_eta = (dgp.a_eta + dgp.s_eta * big_n[g]).max(T::zero()).sqrt();
            let sd_zeta = (dgp.a_zeta + dgp.s_zeta * norms[r]).max(T::zero()).sqrt();
            let u: T = normal(&mut rng);
            x[[i, t]] = xi;
            y[[i, t]] = xi * dgp.beta_hat
                + w.slice(s![i, t, ..]).dot(&dgp.gamma_hat)
                + v[g] * sd_eta
                + u * sd_zeta;
        }
    }

    let mut parts = base.to_parts();
    parts.s_z = new_z;
    if parts.s_x.is_some() {
        parts.s_x = Some(new_x);
    }
    parts.x = x;
    parts.y = y;
    parts.build()
}
