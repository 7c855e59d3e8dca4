//! Built-in synthetic base datasets for the Monte Carlo harness.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{PanelDataset, PanelParts, INTERCEPT};
use crate::error::Result;
use crate::scalar::Real;

use super::normal;

/// Parameters of a synthetic panel.
///
/// Sector codes have four digits: a two-digit group, a three-digit
/// industry within the group and a code within the industry. Units belong to
/// `clusters` clusters round robin. Controls are an intercept and one
/// standard normal covariate.
///
/// ```text
/// S_it   = m_it * normalized(a_cj * Gamma(share_shape)), m_it ~ U(mass_lo, mass_hi)
/// a_cj   = exp(sector_size_sd * N_j + concentration * N_cj)
/// Sx_it  = S_it perturbed by exp(0.2 N), same total mass
/// Zz_tj  = cluster_shock_sd * c_k(j) + N(0, 1)
/// Zx_tj  = 0.3 + 0.8 Zz_tj + 0.5 N
/// X_it   = Sx_it' Zx_t + v_it
/// Y_it   = beta X_it + 0.5 + 0.3 w_it + eta_c + (0.5 + S'S) u_it + 0.5 v_it
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBase {
    pub n: usize,
    pub periods: usize,
    pub groups: usize,
    pub industries_per_group: usize,
    pub codes_per_industry: usize,
    pub clusters: usize,
    pub share_shape: f64,
    pub mass_lo: f64,
    pub mass_hi: f64,
    pub cluster_shock_sd: f64,
    pub cluster_error_sd: f64,
    /// Standard deviation of the log cluster-by-sector share affinities;
    /// larger values concentrate each sector in fewer clusters.
    pub concentration: f64,
    /// Standard deviation of the log sector sizes common to all units.
    pub sector_size_sd: f64,
    /// Standard deviation of the log regression weights.
    pub weight_sd: f64,
    pub beta: f64,
}

impl SyntheticBase {
    /// Seed of the built-in bases.
    pub const DEFAULT_SEED: u64 = 3;

    /// 500 units, 2 periods, 40 four-digit sectors in 20 two-digit groups,
    /// 48 clusters.
    pub fn shares_default() -> Self {
        Self {
            n: 500,
            periods: 2,
            groups: 20,
            industries_per_group: 2,
            codes_per_industry: 1,
            clusters: 48,
            share_shape: 0.1,
            mass_lo: 0.3,
            mass_hi: 0.9,
            cluster_shock_sd: 0.5,
            cluster_error_sd: 0.5,
            concentration: 0.0,
            sector_size_sd: 0.0,
            weight_sd: 1.5,
            beta: 1.0,
        }
    }

    /// 300 units, 2 periods, 100 sectors, each its own three-digit industry.
    pub fn shocks_default() -> Self {
        Self {
            n: 300,
            periods: 2,
            groups: 10,
            industries_per_group: 10,
            codes_per_industry: 1,
            clusters: 48,
            share_shape: 2.0,
            mass_lo: 0.3,
            mass_hi: 0.9,
            cluster_shock_sd: 0.5,
            cluster_error_sd: 0.5,
            concentration: 0.0,
            sector_size_sd: 0.0,
            weight_sd: 0.25,
            beta: 1.0,
        }
    }

    pub fn p(&self) -> usize {
        self.groups * self.industries_per_group * self.codes_per_industry
    }

    fn codes(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.p());
        for g in 0..self.groups {
            for k in 0..self.industries_per_group {
                for c in 0..self.codes_per_industry {
                    out.push(format!("{:02}{}{}", 10 + g, k, c));
                }
            }
        }
        out
    }

    pub fn build<T: Real>(&self, seed: u64) -> Result<PanelDataset<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nt) = (self.n, self.periods);
        let codes = self.codes();
        let p = codes.len();
        let sector_cluster: Vec<String> = codes.iter().map(|c| c[..3].to_string()).collect();
        let industries = self.groups * self.industries_per_group;
        let gamma = Gamma::new(self.share_shape, 1.0).expect("positive shape");

        let affinity: Vec<Vec<f64>> = (0..self.clusters)
            .map(|_| (0..p).map(|_| (self.concentration * normal::<f64, _>(&mut rng)).exp()).collect())
            .collect();
        let size: Vec<f64> = (0..p)
            .map(|_| (self.sector_size_sd * normal::<f64, _>(&mut rng)).exp())
            .collect();
        let mut s_z = Array3::<f64>::zeros((n, nt, p));
        let mut s_x = Array3::<f64>::zeros((n, nt, p));
        for i in 0..n {
            let aff = &affinity[i % self.clusters];
            let mut raw: Vec<f64> = (0..p).map(|j| size[j] * aff[j] * gamma.sample(&mut rng) + 1e-12).collect();
            for t in 0..nt {
                if t > 0 {
                    for v in raw.iter_mut() {
                        *v *= (0.3 * normal::<f64, _>(&mut rng)).exp();
                    }
                }
                let mass = rng.random_range(self.mass_lo..self.mass_hi);
                let total: f64 = raw.iter().sum();
                let pert: Vec<f64> = raw
                    .iter()
                    .map(|v| v * (0.2 * normal::<f64, _>(&mut rng)).exp())
                    .collect();
                let total_x: f64 = pert.iter().sum();
                for j in 0..p {
                    s_z[[i, t, j]] = mass * raw[j] / total;
                    s_x[[i, t, j]] = mass * pert[j] / total_x;
                }
            }
        }

        let mut shock_z = Array2::<f64>::zeros((nt, p));
        let mut shock_x = Array2::<f64>::zeros((nt, p));
        for t in 0..nt {
            let common: Vec<f64> = (0..industries).map(|_| normal(&mut rng)).collect();
            for j in 0..p {
                let k = j / self.codes_per_industry;
                let z = self.cluster_shock_sd * common[k] + normal::<f64, _>(&mut rng);
                shock_z[[t, j]] = z;
                shock_x[[t, j]] = 0.3 + 0.8 * z + 0.5 * normal::<f64, _>(&mut rng);
            }
        }

        let weight: Array1<f64> = (0..n).map(|_| (self.weight_sd * normal::<f64, _>(&mut rng)).exp()).collect();
        let eta: Vec<f64> = (0..self.clusters)
            .map(|_| self.cluster_error_sd * normal::<f64, _>(&mut rng))
            .collect();
        let mut w = Array3::<f64>::zeros((n, nt, 2));
        let mut x = Array2::<f64>::zeros((n, nt));
        let mut y = Array2::<f64>::zeros((n, nt));
        let mut obs_cluster = Vec::with_capacity(n * nt);
        for i in 0..n {
            let unit_level: f64 = normal(&mut rng);
            let c = i % self.clusters;
            for t in 0..nt {
                let cov = unit_level + 0.3 * normal::<f64, _>(&mut rng);
                w[[i, t, 0]] = 1.0;
                w[[i, t, 1]] = cov;
                let sx = s_x.slice(ndarray::s![i, t, ..]);
                let sz = s_z.slice(ndarray::s![i, t, ..]);
                let v: f64 = normal(&mut rng);
                let u: f64 = normal(&mut rng);
                let xi = sx.dot(&shock_x.row(t)) + v;
                x[[i, t]] = xi;
                y[[i, t]] =
                    self.beta * xi + 0.5 + 0.3 * cov + eta[c] + (0.5 + sz.dot(&sz)) * u + 0.5 * v;
                obs_cluster.push(format!("c{c:02}"));
            }
        }

        let lift2 = |a: Array2<f64>| a.mapv(T::lit);
        let lift3 = |a: Array3<f64>| a.mapv(T::lit);
        PanelParts {
            unit_labels: (0..n).map(|i| format!("u{i:04}")).collect(),
            period_labels: (0..nt).map(|t| (1990 + 10 * t).to_string()).collect(),
            sector_codes: codes,
            sector_cluster,
            control_names: vec![INTERCEPT.to_string(), "w1".to_string()],
            y: lift2(y),
            x: lift2(x),
            w: lift3(w),
            s_z: lift3(s_z),
            s_x: Some(lift3(s_x)),
            shock_z: lift2(shock_z),
            shock_x: Some(lift2(shock_x)),
            reg_weight: Array2::from_shape_fn((n, nt), |(i, _)| T::lit(weight[i])),
            obs_cluster,
        }
        .build()
    }
}

/// Panel with a common sector-level error, for the long-panel variance.
///
/// No controls and unit weights:
///
/// ```text
/// Z_t   = mu + N(0, I_p)
/// u_t   = rho u_{t-1} + sqrt(1 - rho^2) sigma_u N(0, I_p)
/// eps   = S_it' u_t + e_it,  e_it = 0.5 v_it + sigma_e N
/// X_it  = S_it' Z_t + 0.5 S_it' u_t + v_it
/// Y_it  = beta X_it + eps_it
/// ```
///
/// With `sigma_u = 0` the cross-sectional means of `S eps` vanish in the
/// limit and only the panel component is left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongPanelBase {
    pub n: usize,
    pub periods: usize,
    pub p: usize,
    pub mu: f64,
    pub rho: f64,
    pub sigma_u: f64,
    pub sigma_e: f64,
    pub beta: f64,
}

impl Default for LongPanelBase {
    fn default() -> Self {
        Self {
            n: 200,
            periods: 50,
            p: 5,
            mu: 1.0,
            rho: 0.0,
            sigma_u: 1.0,
            sigma_e: 1.0,
            beta: 1.0,
        }
    }
}

impl LongPanelBase {
    pub fn build<T: Real>(&self, seed: u64) -> Result<PanelDataset<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nt, p) = (self.n, self.periods, self.p);
        let gamma = Gamma::new(1.0, 1.0).expect("unit shape");
        let mut shock = Array2::<f64>::zeros((nt, p));
        let mut u = Array2::<f64>::zeros((nt, p));
        let innov = (1.0 - self.rho * self.rho).sqrt() * self.sigma_u;
        for t in 0..nt {
            for j in 0..p {
                shock[[t, j]] = self.mu + normal::<f64, _>(&mut rng);
                let prev = if t == 0 {
                    self.sigma_u * normal::<f64, _>(&mut rng)
                } else {
                    self.rho * u[[t - 1, j]] + innov * normal::<f64, _>(&mut rng)
                };
                u[[t, j]] = prev;
            }
        }
        let mut s_z = Array3::<f64>::zeros((n, nt, p));
        let mut x = Array2::<f64>::zeros((n, nt));
        let mut y = Array2::<f64>::zeros((n, nt));
        for i in 0..n {
            for t in 0..nt {
                let raw: Vec<f64> = (0..p).map(|_| gamma.sample(&mut rng)).collect();
                let mass = rng.random_range(0.5..1.0) / raw.iter().sum::<f64>();
                for j in 0..p {
                    s_z[[i, t, j]] = mass * raw[j];
                }
                let s = s_z.slice(ndarray::s![i, t, ..]);
                let v: f64 = normal(&mut rng);
                let e = 0.5 * v + self.sigma_e * normal::<f64, _>(&mut rng);
                let common = s.dot(&u.row(t));
                let xi = s.dot(&shock.row(t)) + 0.5 * common + v;
                x[[i, t]] = xi;
                y[[i, t]] = self.beta * xi + common + e;
            }
        }
        let lift2 = |a: Array2<f64>| a.mapv(T::lit);
        let codes: Vec<String> = (0..p).map(|j| format!("{}", 1000 + j)).collect();
        PanelParts {
            unit_labels: (0..n).map(|i| format!("u{i:04}")).collect(),
            period_labels: (0..nt).map(|t| format!("{t:03}")).collect(),
            sector_cluster: codes.iter().map(|c| c[..3].to_string()).collect(),
            sector_codes: codes,
            control_names: Vec::new(),
            y: lift2(y),
            x: lift2(x),
            w: Array3::zeros((n, nt, 0)),
            s_z: s_z.mapv(T::lit),
            s_x: None,
            shock_z: lift2(shock),
            shock_x: None,
            reg_weight: Array2::ones((n, nt)),
            obs_cluster: (0..n * nt).map(|r| format!("u{:04}", r / nt)).collect(),
        }
        .build()
    }
}
