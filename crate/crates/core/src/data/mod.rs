//! Panel dataset representation, validation, SIC aggregation and stacking.

mod aggregate;
mod csv_io;
mod stack;

pub use aggregate::{aggregate_sic, Aggregation};
pub use csv_io::{load_csv, write_csv, Schema, ShockLayout, ShockSchema};
pub use stack::{stack_panel, StackedDesign};

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Shares may sum to less than one; sums above `1 + SHARE_SUM_TOL` are rejected.
pub const SHARE_SUM_TOL: f64 = 1e-9;

/// Name given to the intercept column when the schema requests one.
pub const INTERCEPT: &str = "(intercept)";

/// Raw pieces of a [`PanelDataset`], validated by [`PanelParts::build`].
///
/// Row-major conventions: matrices indexed `[unit, period]`, tensors
/// `[unit, period, k]`, shocks `[period, sector]`; `obs_cluster` is
/// unit-major (`i * T + t`).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelParts<T: Real> {
    pub unit_labels: Vec<String>,
    pub period_labels: Vec<String>,
    pub sector_codes: Vec<String>,
    pub sector_cluster: Vec<String>,
    pub control_names: Vec<String>,
    pub y: Array2<T>,
    pub x: Array2<T>,
    pub w: Array3<T>,
    pub s_z: Array3<T>,
    pub s_x: Option<Array3<T>>,
    pub shock_z: Array2<T>,
    pub shock_x: Option<Array2<T>>,
    pub reg_weight: Array2<T>,
    pub obs_cluster: Vec<String>,
}

impl<T: Real> PanelParts<T> {
    pub fn build(self) -> Result<PanelDataset<T>> {
        PanelDataset::from_parts(self, None)
    }
}

/// Stacked `(unit, period)` observations of a shift-share design.
///
/// Immutable once built; every accessor hands out views.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset<T: Real> {
    parts: PanelParts<T>,
    z: Array2<T>,
    aggregation: Option<Aggregation>,
}

impl<T: Real> PanelDataset<T> {
    pub(crate) fn from_parts(p: PanelParts<T>, aggregation: Option<Aggregation>) -> Result<Self> {
        let n = p.unit_labels.len();
        let nt = p.period_labels.len();
        let np = p.sector_codes.len();
        let d = p.control_names.len();
        let dim_err = |what: &str, got: &[usize], want: &[usize]| {
            Error::Dimension(format!("{what} has shape {got:?}, expected {want:?}"))
        };
        if n == 0 || nt == 0 || np == 0 {
            return Err(Error::InvalidData(
                "dataset needs at least one unit, period and sector".into(),
            ));
        }
        for (name, m) in [("y", &p.y), ("x", &p.x), ("reg_weight", &p.reg_weight)] {
            if m.dim() != (n, nt) {
                return Err(dim_err(name, m.shape(), &[n, nt]));
            }
        }
        if p.w.dim() != (n, nt, d) {
            return Err(dim_err("w", p.w.shape(), &[n, nt, d]));
        }
        if p.s_z.dim() != (n, nt, np) {
            return Err(dim_err("s_z", p.s_z.shape(), &[n, nt, np]));
        }
        if let Some(sx) = &p.s_x {
            if sx.dim() != (n, nt, np) {
                return Err(dim_err("s_x", sx.shape(), &[n, nt, np]));
            }
        }
        if p.shock_z.dim() != (nt, np) {
            return Err(dim_err("shock_z", p.shock_z.shape(), &[nt, np]));
        }
        if let Some(zx) = &p.shock_x {
            if zx.dim() != (nt, np) {
                return Err(dim_err("shock_x", zx.shape(), &[nt, np]));
            }
        }
        if p.sector_cluster.len() != np {
            return Err(dim_err("sector_cluster", &[p.sector_cluster.len()], &[np]));
        }
        if p.obs_cluster.len() != n * nt {
            return Err(dim_err("obs_cluster", &[p.obs_cluster.len()], &[n * nt]));
        }

        finite("y", p.y.iter())?;
        finite("x", p.x.iter())?;
        finite("w", p.w.iter())?;
        finite("shock_z", p.shock_z.iter())?;
        if let Some(zx) = &p.shock_x {
            finite("shock_x", zx.iter())?;
        }
        finite("reg_weight", p.reg_weight.iter())?;
        if let Some(((i, t), _)) = p
            .reg_weight
            .indexed_iter()
            .find(|(_, &w)| !(w > T::zero()))
        {
            return Err(Error::InvalidData(format!(
                "regression weight for unit `{}`, period `{}` is not strictly positive",
                p.unit_labels[i], p.period_labels[t]
            )));
        }
        check_shares(&p, &p.s_z)?;
        if let Some(sx) = &p.s_x {
            check_shares(&p, sx)?;
        }

        let mut z = Array2::zeros((n, nt));
        for i in 0..n {
            for t in 0..nt {
                let v = p.s_z.slice(ndarray::s![i, t, ..]).dot(&p.shock_z.row(t));
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "Bartik instrument is not finite for unit `{}`, period `{}`",
                        p.unit_labels[i], p.period_labels[t]
                    )));
                }
                z[[i, t]] = v;
            }
        }

        Ok(Self {
            parts: p,
            z,
            aggregation,
        })
    }

    /// Hands back the raw parts (dropping any SIC aggregation).
    pub fn into_parts(self) -> PanelParts<T> {
        self.parts
    }

    pub fn to_parts(&self) -> PanelParts<T> {
        self.parts.clone()
    }

    pub fn n(&self) -> usize {
        self.parts.unit_labels.len()
    }
    pub fn periods(&self) -> usize {
        self.parts.period_labels.len()
    }
    /// Number of native sectors.
    pub fn p(&self) -> usize {
        self.parts.sector_codes.len()
    }
    pub fn d(&self) -> usize {
        self.parts.control_names.len()
    }
    pub fn unit_labels(&self) -> &[String] {
        &self.parts.unit_labels
    }
    pub fn period_labels(&self) -> &[String] {
        &self.parts.period_labels
    }
    pub fn sector_codes(&self) -> &[String] {
        &self.parts.sector_codes
    }
    pub fn sector_cluster(&self) -> &[String] {
        &self.parts.sector_cluster
    }
    pub fn control_names(&self) -> &[String] {
        &self.parts.control_names
    }
    pub fn has_intercept(&self) -> bool {
        self.parts.control_names.iter().any(|c| c == INTERCEPT)
    }
    pub fn y(&self) -> ArrayView2<'_, T> {
        self.parts.y.view()
    }
    pub fn x(&self) -> ArrayView2<'_, T> {
        self.parts.x.view()
    }
    pub fn controls(&self) -> &Array3<T> {
        &self.parts.w
    }
    /// Instrument shares at the native sector level.
    pub fn shares(&self) -> &Array3<T> {
        &self.parts.s_z
    }
    pub fn regressor_shares(&self) -> Option<&Array3<T>> {
        self.parts.s_x.as_ref()
    }
    pub fn shock_z(&self) -> ArrayView2<'_, T> {
        self.parts.shock_z.view()
    }
    pub fn shock_x(&self) -> Option<ArrayView2<'_, T>> {
        self.parts.shock_x.as_ref().map(|m| m.view())
    }
    pub fn reg_weight(&self) -> ArrayView2<'_, T> {
        self.parts.reg_weight.view()
    }
    pub fn obs_cluster(&self) -> &[String] {
        &self.parts.obs_cluster
    }
    /// Bartik instrument `Z_it = S_it' shock_t`, always at the native level.
    pub fn instrument(&self) -> ArrayView2<'_, T> {
        self.z.view()
    }
    pub fn aggregation(&self) -> Option<&Aggregation> {
        self.aggregation.as_ref()
    }

    /// Shares entering share-level moments: aggregated if an aggregation is
    /// active, otherwise the native shares.
    pub fn moment_shares(&self) -> Array3<T> {
        match &self.aggregation {
            None => self.parts.s_z.clone(),
            Some(agg) => {
                let (n, nt, _) = self.parts.s_z.dim();
                let mut out = Array3::zeros((n, nt, agg.codes.len()));
                for ((i, t, j), &v) in self.parts.s_z.indexed_iter() {
                    out[[i, t, agg.group_of[j]]] += v;
                }
                out
            }
        }
    }

    pub fn moment_codes(&self) -> &[String] {
        match &self.aggregation {
            None => &self.parts.sector_codes,
            Some(agg) => &agg.codes,
        }
    }

    pub fn moment_clusters(&self) -> &[String] {
        match &self.aggregation {
            None => &self.parts.sector_cluster,
            Some(agg) => &agg.clusters,
        }
    }

    /// Row sums of the native instrument shares, `[unit, period]`.
    pub fn share_totals(&self) -> Array2<T> {
        self.parts.s_z.sum_axis(Axis(2))
    }
}

fn finite<'a, T: Real>(name: &str, mut it: impl Iterator<Item = &'a T>) -> Result<()> {
    if it.any(|v| !v.is_finite()) {
        Err(Error::InvalidData(format!("non-finite entry in {name}")))
    } else {
        Ok(())
    }
}

fn check_shares<T: Real>(p: &PanelParts<T>, s: &Array3<T>) -> Result<()> {
    let (n, nt, np) = s.dim();
    let limit = T::one() + T::lit(SHARE_SUM_TOL);
    for i in 0..n {
        for t in 0..nt {
            let mut sum = T::zero();
            for j in 0..np {
                let v = s[[i, t, j]];
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "non-finite share for unit `{}`, period `{}`",
                        p.unit_labels[i], p.period_labels[t]
                    )));
                }
                if v < T::zero() {
                    return Err(Error::NegativeShare {
                        unit: p.unit_labels[i].clone(),
                        period: p.period_labels[t].clone(),
                        sector: p.sector_codes[j].clone(),
                        value: v.as_f64(),
                    });
                }
                sum += v;
            }
            if sum > limit {
                return Err(Error::ShareSumExceeded {
                    unit: p.unit_labels[i].clone(),
                    period: p.period_labels[t].clone(),
                    sum: sum.as_f64(),
                });
            }
        }
    }
    Ok(())
}

/// Dense integer coding of string cluster labels, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterIndex {
    pub labels: Vec<String>,
    pub assignment: Vec<usize>,
}

impl ClusterIndex {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        let mut out_labels = Vec::new();
        let mut assignment = Vec::with_capacity(labels.len());
        for l in labels {
            let l = l.as_ref();
            let next = seen.len();
            let id = *seen.entry(l).or_insert_with(|| {
                out_labels.push(l.to_string());
                next
            });
            assignment.push(id);
        }
        Self {
            labels: out_labels,
            assignment,
        }
    }

    /// Every row its own cluster.
    pub fn singletons(rows: usize) -> Self {
        Self {
            labels: (0..rows).map(|r| r.to_string()).collect(),
            assignment: (0..rows).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
