use ndarray::{s, Array1, Array2};

use super::PanelDataset;
use crate::scalar::Real;

/// Row-stacked design, one row per `(unit, period)` in unit-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDesign<T: Real> {
    pub y: Array1<T>,
    pub x: Array1<T>,
    /// Controls, `rows x d`.
    pub w: Array2<T>,
    pub control_names: Vec<String>,
    /// Bartik instrument per row.
    pub z: Array1<T>,
    /// Native instrument shares, `rows x p`.
    pub s: Array2<T>,
    /// Shares used for share-level moments (aggregated if requested), `rows x q`.
    pub moment_s: Array2<T>,
    pub moment_codes: Vec<String>,
    pub weight: Array1<T>,
    pub obs_cluster: Vec<String>,
    /// `(unit, period)` of each row.
    pub row_index: Vec<(usize, usize)>,
    pub periods: usize,
}

impl<T: Real> StackedDesign<T> {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// Keeps only the listed rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick1 = |a: &Array1<T>| Array1::from_iter(rows.iter().map(|&r| a[r]));
        let pick2 = |a: &Array2<T>| {
            let mut out = Array2::zeros((rows.len(), a.ncols()));
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(k).assign(&a.row(r));
            }
            out
        };
        Self {
            y: pick1(&self.y),
            x: pick1(&self.x),
            w: pick2(&self.w),
            control_names: self.control_names.clone(),
            z: pick1(&self.z),
            s: pick2(&self.s),
            moment_s: pick2(&self.moment_s),
            moment_codes: self.moment_codes.clone(),
            weight: pick1(&self.weight),
            obs_cluster: rows.iter().map(|&r| self.obs_cluster[r].clone()).collect(),
            row_index: rows.iter().map(|&r| self.row_index[r]).collect(),
            periods: self.periods,
        }
    }

    /// Rows belonging to period `t`.
    pub fn period_rows(&self, t: usize) -> Vec<usize> {
        (0..self.rows())
            .filter(|&r| self.row_index[r].1 == t)
            .collect()
    }
}

/// Stacks a panel into `n * T` rows, unit-major then period.
pub fn stack_panel<T: Real>(ds: &PanelDataset<T>) -> StackedDesign<T> {
    let (n, nt, p, d) = (ds.n(), ds.periods(), ds.p(), ds.d());
    let rows = n * nt;
    let moment = ds.moment_shares();
    let q = moment.dim().2;
    let mut y = Array1::zeros(rows);
    let mut x = Array1::zeros(rows);
    let mut z = Array1::zeros(rows);
    let mut weight = Array1::zeros(rows);
    let mut w = Array2::zeros((rows, d));
    let mut sm = Array2::zeros((rows, p));
    let mut mm = Array2::zeros((rows, q));
    let mut row_index = Vec::with_capacity(rows);
    for i in 0..n {
        for t in 0..nt {
            let r = i * nt + t;
            y[r] = ds.y()[[i, t]];
            x[r] = ds.x()[[i, t]];
            z[r] = ds.instrument()[[i, t]];
            weight[r] = ds.reg_weight()[[i, t]];
            w.row_mut(r).assign(&ds.controls().slice(s![i, t, ..]));
            sm.row_mut(r).assign(&ds.shares().slice(s![i, t, ..]));
            mm.row_mut(r).assign(&moment.slice(s![i, t, ..]));
            row_index.push((i, t));
        }
    }
    StackedDesign {
        y,
        x,
        w,
        control_names: ds.control_names().to_vec(),
        z,
        s: sm,
        moment_s: mm,
        moment_codes: ds.moment_codes().to_vec(),
        weight,
        obs_cluster: ds.obs_cluster().to_vec(),
        row_index,
        periods: nt,
    }
}
